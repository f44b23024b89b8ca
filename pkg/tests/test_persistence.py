import json
import struct

import numpy as np
import pytest

from textcnn import persistence
from textcnn.model import PAPER_CONFIG, ModelConfig, init_params, predict
from textcnn.persistence import (
    ManifestMismatchError,
    ModelBundle,
    NotAModelFileError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from textcnn.text import LabelMap, Vocabulary
from textcnn.training import TrainConfig

CFG = ModelConfig(embedding_dim=5, seq_len=8, heights=(2, 3), kernels_per_height=3, num_classes=3)


def make_bundle(cfg=CFG, vocab_size=6, seed=0):
    vocab = Vocabulary(("*pad*", "*unk*", *[f"w{i}" for i in range(vocab_size - 2)]))
    labels = LabelMap(tuple(f"c{i}" for i in range(cfg.num_classes)))
    return ModelBundle(init_params(cfg, vocab_size, seed), vocab, labels, TrainConfig(model=cfg, learning_rate=0.3))


def test_roundtrip_bit_exact(tmp_path):
    b = make_bundle()
    path = tmp_path / "m.tcnn"
    n = persistence.save(b, path)
    assert n == path.stat().st_size
    loaded = persistence.load(path)
    for (na, a), (nb, c) in zip(b.params.named(), loaded.params.named()):
        assert na == nb and a.tobytes() == c.tobytes() and a.shape == c.shape
    assert loaded.vocab == b.vocab and loaded.label_map == b.label_map
    assert loaded.train_config == b.train_config
    path2 = tmp_path / "m2.tcnn"
    persistence.save(loaded, path2)
    assert path2.read_bytes() == path.read_bytes()


def test_loaded_predictions_equal(tmp_path):
    b = make_bundle(seed=3)
    persistence.save(b, tmp_path / "m")
    loaded = persistence.load(tmp_path / "m")
    for text in ["w0 w1", "", "w3 zz w2 w2 w1 w0 w3 w3 w3"]:
        la, pa = predict(text, b.params, b.vocab, b.label_map)
        lb, pb = predict(text, loaded.params, loaded.vocab, loaded.label_map)
        assert la == lb and pa.tobytes() == pb.tobytes()


def test_header_layout():
    data = persistence.to_bytes(make_bundle())
    magic, version, mlen = struct.unpack_from("<4sIQ", data)
    assert magic == b"TCNN" and version == 1
    manifest = json.loads(data[16:16 + mlen])
    assert set(manifest) == {"train_config", "labels", "vocabulary", "tensors"}
    assert manifest["labels"] == ["c0", "c1", "c2"]
    assert manifest["vocabulary"][:2] == ["*pad*", "*unk*"]
    t = manifest["tensors"][0]
    payload = data[16 + mlen:]
    emb = np.frombuffer(payload[t["byte_offset"]:t["byte_offset"] + t["byte_length"]], "<f8")
    assert emb.reshape(t["dims"]).shape == (6, 5)


def test_paper_config_tensor_directory():
    b = make_bundle(PAPER_CONFIG, vocab_size=40)
    data = persistence.to_bytes(b)
    mlen = struct.unpack_from("<Q", data, 8)[0]
    tensors = json.loads(data[16:16 + mlen])["tensors"]
    assert [(t["name"], t["dims"]) for t in tensors] == [
        ("embedding", [40, 300]),
        ("conv4.weight", [128, 4, 300]), ("conv4.bias", [128]),
        ("conv5.weight", [128, 5, 300]), ("conv5.bias", [128]),
        ("conv6.weight", [128, 6, 300]), ("conv6.bias", [128]),
        ("fc.weight", [384, 6]), ("fc.bias", [6]),
    ]


def test_bad_magic():
    with pytest.raises(NotAModelFileError, match="not a model file"):
        persistence.from_bytes(b"PK\x03\x04" + bytes(40))


def test_unsupported_version():
    data = bytearray(persistence.to_bytes(make_bundle()))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(UnsupportedVersionError, match="99"):
        persistence.from_bytes(bytes(data))


def test_truncated_payload():
    data = persistence.to_bytes(make_bundle())
    with pytest.raises(TruncatedFileError, match=r"expected \d+ bytes, got \d+"):
        persistence.from_bytes(data[:-8])
    with pytest.raises(TruncatedFileError):
        persistence.from_bytes(data[:10])
    with pytest.raises(TruncatedFileError, match="manifest"):
        persistence.from_bytes(data[:40])


def _rewrite_manifest(data, edit):
    mlen = struct.unpack_from("<Q", data, 8)[0]
    manifest = json.loads(data[16:16 + mlen])
    edit(manifest)
    blob = json.dumps(manifest).encode()
    return data[:8] + struct.pack("<Q", len(blob)) + blob + data[16 + mlen:]


@pytest.mark.parametrize("edit", [
    lambda m: m["tensors"][1].update(byte_length=m["tensors"][1]["byte_length"] + 8),
    lambda m: m["tensors"][0].update(dims=[5, 6]),
    lambda m: m["tensors"].pop(),
    lambda m: m["vocabulary"].append("extra"),
    lambda m: m["labels"].pop(),
    lambda m: m.pop("train_config"),
    lambda m: m["tensors"][2].update(byte_offset=0),
])
def test_manifest_mismatch(edit):
    data = _rewrite_manifest(persistence.to_bytes(make_bundle()), edit)
    with pytest.raises(ManifestMismatchError):
        persistence.from_bytes(data)


def test_trailing_bytes_rejected():
    with pytest.raises(ManifestMismatchError):
        persistence.from_bytes(persistence.to_bytes(make_bundle()) + b"\0" * 8)


def test_inconsistent_bundle_not_saved(tmp_path):
    b = make_bundle()
    b.vocab = Vocabulary(("*pad*", "*unk*"))
    with pytest.raises(ValueError):
        persistence.save(b, tmp_path / "x")
