#!/usr/bin/env python3
"""Compare the compiled and numpy convolution kernels.

Times one bank's forward (conv + ReLU + pool) and backward per record at the
desk and paper configurations, then one full desk training epoch per backend.

    python benchmarks/bench_kernels.py --repeats 200
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from textcnn import _core
from textcnn.model import DESK_CONFIG, PAPER_CONFIG, with_classes
from textcnn.synthdata import SynthSpec, generate_rows
from textcnn.text import EncodedRecord, LabelMap, build_vocabulary, encode, tokenize
from textcnn.training import TrainConfig, train


def time_kernels(cfg, repeats, rng):
    N, D, K = cfg.seq_len, cfg.embedding_dim, cfg.kernels_per_height
    X = rng.uniform(-0.05, 0.05, size=(N, D))
    banks = [(rng.uniform(-0.05, 0.05, size=(K, H, D)), rng.uniform(-0.05, 0.05, size=K)) for H in cfg.heights]
    g = rng.normal(size=K)
    fwd = bwd = 0.0
    for _ in range(repeats):
        for W, b in banks:
            t0 = time.perf_counter()
            _, _, amax = _core.conv_pool(X, W, b)
            t1 = time.perf_counter()
            _core.conv_backward(X, W, amax, g, np.zeros_like(W), np.zeros(K), np.zeros_like(X))
            t2 = time.perf_counter()
            fwd += t1 - t0
            bwd += t2 - t1
    return fwd / repeats * 1e3, bwd / repeats * 1e3


def desk_epoch_seconds():
    rows, _ = generate_rows(SynthSpec())
    docs = [tokenize(t) for t, _ in rows]
    vocab = build_vocabulary(docs, 5)
    labels = LabelMap.from_labels(lab for _, lab in rows)
    cfg = with_classes(DESK_CONFIG, len(labels))
    recs = [EncodedRecord(tuple(encode(d, vocab, cfg.seq_len)), labels.id_of(lab)) for d, (_, lab) in zip(docs, rows)]
    t0 = time.perf_counter()
    train(recs, TrainConfig(model=cfg, learning_rate=0.5, epochs=1, seed=0), len(vocab))
    return time.perf_counter() - t0


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=100)
    ap.add_argument("--skip-epoch", action="store_true")
    args = ap.parse_args()

    backends = _core.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'config':<6} {'backend':<9} {'forward ms':>11} {'backward ms':>12}  (all banks, one record)")
    for name, cfg in (("desk", DESK_CONFIG), ("paper", PAPER_CONFIG)):
        for backend in backends:
            _core.use_backend(backend)
            fwd, bwd = time_kernels(cfg, args.repeats, np.random.default_rng(0))
            print(f"{name:<6} {backend:<9} {fwd:11.4f} {bwd:12.4f}")
    if not args.skip_epoch:
        for backend in backends:
            _core.use_backend(backend)
            print(f"desk training epoch (1200 records) [{backend}]: {desk_epoch_seconds():.2f} s")


if __name__ == "__main__":
    main()
