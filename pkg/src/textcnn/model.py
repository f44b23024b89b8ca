"""Parameters and forward pass of the multi-height convolutional classifier.

Pipeline per record: embedding lookup -> one valid convolution per kernel
(stride 1) -> ReLU -> global max pool -> concatenation into the feature
vector -> optional dropout -> fully connected layer -> softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _core
from .text import LabelMap, Vocabulary, encode, tokenize

INIT_SCALE = 0.05


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 300
    seq_len: int = 130
    heights: tuple[int, ...] = (4, 5, 6)
    kernels_per_height: int = 128
    num_classes: int = 6
    conv_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "heights", tuple(int(h) for h in self.heights))
        for name in ("embedding_dim", "seq_len", "kernels_per_height", "num_classes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.heights:
            raise ValueError("at least one kernel height is required")
        if any(b <= a for a, b in zip(self.heights, self.heights[1:])):
            raise ValueError("kernel heights must be strictly increasing")
        if self.heights[0] < 1 or self.heights[-1] > self.seq_len:
            raise ValueError("kernel heights must lie in 1..seq_len")
        if self.conv_stride != 1:
            raise ValueError("only conv_stride=1 is supported")

    @property
    def feature_dim(self) -> int:
        return len(self.heights) * self.kernels_per_height


PAPER_CONFIG = ModelConfig()
DESK_CONFIG = ModelConfig(embedding_dim=32, seq_len=40, heights=(2, 3, 4), kernels_per_height=16)


@dataclass(eq=False)
class ParamArrays:
    """The five trainable groups; also used for gradients and momentum buffers."""

    embedding: np.ndarray
    conv_weights: list[np.ndarray]
    conv_biases: list[np.ndarray]
    fc_weight: np.ndarray
    fc_bias: np.ndarray

    def named(self) -> list[tuple[str, np.ndarray]]:
        out = [("embedding", self.embedding)]
        for W, b in zip(self.conv_weights, self.conv_biases):
            out.append((f"conv{W.shape[1]}.weight", W))
            out.append((f"conv{W.shape[1]}.bias", b))
        out.append(("fc.weight", self.fc_weight))
        out.append(("fc.bias", self.fc_bias))
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named()]

    def zeros_like(self) -> "ParamArrays":
        return ParamArrays(
            np.zeros_like(self.embedding),
            [np.zeros_like(W) for W in self.conv_weights],
            [np.zeros_like(b) for b in self.conv_biases],
            np.zeros_like(self.fc_weight),
            np.zeros_like(self.fc_bias),
        )


@dataclass(eq=False)
class ModelParams(ParamArrays):
    config: ModelConfig = field(default_factory=ModelConfig)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.embedding.copy(),
            [W.copy() for W in self.conv_weights],
            [b.copy() for b in self.conv_biases],
            self.fc_weight.copy(),
            self.fc_bias.copy(),
            self.config,
        )

    def validate(self) -> None:
        cfg = self.config
        D, K, L = cfg.embedding_dim, cfg.kernels_per_height, cfg.num_classes
        if self.embedding.ndim != 2 or self.embedding.shape[1] != D or self.embedding.shape[0] < 2:
            raise ValueError(f"embedding shape {self.embedding.shape} inconsistent with D={D}")
        if len(self.conv_weights) != len(cfg.heights) or len(self.conv_biases) != len(cfg.heights):
            raise ValueError("number of conv banks does not match heights")
        for H, W, b in zip(cfg.heights, self.conv_weights, self.conv_biases):
            if W.shape != (K, H, D) or b.shape != (K,):
                raise ValueError(f"conv bank for height {H} has shapes {W.shape}, {b.shape}")
        if self.fc_weight.shape != (cfg.feature_dim, L) or self.fc_bias.shape != (L,):
            raise ValueError("fully connected shapes inconsistent with config")


Gradients = ParamArrays
Velocity = ParamArrays


def init_params(config: ModelConfig, vocab_size: int, seed: int) -> ModelParams:
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2 (pad and unk)")
    rng = np.random.default_rng(seed)
    D, K = config.embedding_dim, config.kernels_per_height

    def uniform(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    embedding = uniform(vocab_size, D)
    embedding[0] = 0.0
    conv_weights, conv_biases = [], []
    for H in config.heights:
        conv_weights.append(uniform(K, H, D))
        conv_biases.append(uniform(K))
    fc_weight = uniform(config.feature_dim, config.num_classes)
    fc_bias = np.zeros(config.num_classes)
    return ModelParams(embedding, conv_weights, conv_biases, fc_weight, fc_bias, config)


def embed(ids: Sequence[int], params: ModelParams) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= params.vocab_size):
        raise IndexError(f"token id out of range 0..{params.vocab_size - 1}")
    X = params.embedding[ids]
    # pad positions are constant zero rows, independent of the stored pad row
    X[ids == 0] = 0.0
    return X


def conv_forward(X: np.ndarray, kernel: np.ndarray, bias: float) -> tuple[np.ndarray, np.ndarray]:
    """Single-kernel convolution; returns (pre-ReLU, post-ReLU) vectors of length N-H+1."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if kernel.shape[0] > X.shape[0]:
        raise ValueError(f"kernel height {kernel.shape[0]} exceeds sequence length {X.shape[0]}")
    pre, _, _ = _core.conv_pool(X, kernel[None], np.array([float(bias)]))
    pre = pre[:, 0]
    return pre, np.maximum(pre, 0.0)


def global_max_pool(C) -> tuple[float, int]:
    C = np.asarray(C, dtype=np.float64)
    if C.size == 0:
        raise ValueError("cannot pool an empty vector")
    i = int(np.argmax(C))
    return float(C[i]), i


def softmax(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("softmax input must be finite")
    e = np.exp(y - y.max())
    return e / e.sum()


def apply_dropout(F: np.ndarray, rate: float, rng=None, mode: str = "train"):
    """Inverted dropout. Returns (F', keep-mask); the mask is None in inference mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if mode == "infer":
        return F, None
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("training mode requires an rng")
    if rate == 0.0:
        return F.copy(), np.ones(F.shape, dtype=bool)
    mask = rng.random(F.shape) >= rate
    return F * mask / (1.0 - rate), mask


@dataclass(eq=False)
class ForwardTrace:
    ids: np.ndarray
    embedded: np.ndarray
    conv_pre: list[np.ndarray]  # per bank, (P, K)
    pool_argmax: list[np.ndarray]  # per bank, (K,)
    features: np.ndarray  # concatenated pooled values, before dropout
    dropout_mask: np.ndarray | None
    dropout_rate: float
    fc_input: np.ndarray  # features after dropout
    logits: np.ndarray
    probs: np.ndarray

    @property
    def conv_post(self) -> list[np.ndarray]:
        return [np.maximum(pre, 0.0) for pre in self.conv_pre]


def forward(ids, params: ModelParams, mode: str = "infer", dropout_rate: float = 0.0, rng=None) -> ForwardTrace:
    ids = np.asarray(ids, dtype=np.intp)
    if mode == "train" and rng is None:
        raise ValueError("training mode requires an rng")
    X = np.ascontiguousarray(embed(ids, params))
    pres, argmaxes, pooled = [], [], []
    for W, b in zip(params.conv_weights, params.conv_biases):
        pre, pool, amax = _core.conv_pool(X, W, b)
        pres.append(pre)
        pooled.append(pool)
        argmaxes.append(amax)
    F = np.concatenate(pooled)
    fc_in, mask = apply_dropout(F, dropout_rate, rng, mode)
    y = fc_in @ params.fc_weight + params.fc_bias
    return ForwardTrace(ids, X, pres, argmaxes, F, mask, dropout_rate, fc_in, y, softmax(y))


def extract_features(ids, params: ModelParams) -> np.ndarray:
    return forward(ids, params, mode="infer").features


def predict(text: str, params: ModelParams, vocab: Vocabulary, label_map: LabelMap, tokenizer=tokenize):
    """Return (label, probability vector) for one raw text."""
    ids = encode(tokenizer(text), vocab, params.config.seq_len)
    P = forward(ids, params, mode="infer").probs
    return label_map[int(np.argmax(P))], P


def with_classes(config: ModelConfig, num_classes: int) -> ModelConfig:
    return replace(config, num_classes=num_classes)
