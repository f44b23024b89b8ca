"""Loss, backpropagation, SGD with momentum and the finite-difference checker."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import _core
from .model import (
    DESK_CONFIG,
    ForwardTrace,
    Gradients,
    ModelConfig,
    ModelParams,
    ParamArrays,
    Velocity,
    apply_dropout,  # noqa: F401  (re-exported)
    forward,
    init_params,
)
from .text import EncodedRecord


class TrainingError(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2_coeff: float = 1e-4
    dropout_rate: float = 0.5
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    min_count: int = 5
    max_norm: float | None = None  # optional per-class clamp on fc_weight columns, e.g. 3.0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.momentum <= 1:
            raise ValueError("momentum must be in (0, 1]")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be nonnegative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.min_count < 0:
            raise ValueError("min_count must be >= 0")
        if self.max_norm is not None and not self.max_norm > 0:
            raise ValueError("max_norm must be positive when set")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["heights"] = list(self.model.heights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(model=model, **d)


DESK_TRAIN_CONFIG = TrainConfig(model=DESK_CONFIG)


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range 0..{num_classes - 1}")
    T = np.zeros(num_classes)
    T[label] = 1.0
    return T


def loss(P_batch, T_batch, fc_weight, l2_coeff: float) -> float:
    """Summed squared error over the batch plus ``l2_coeff * ||fc_weight||_F^2``."""
    P = np.atleast_2d(np.asarray(P_batch, dtype=np.float64))
    T = np.atleast_2d(np.asarray(T_batch, dtype=np.float64))
    if P.shape != T.shape or P.shape[0] == 0:
        raise ValueError(f"shape mismatch: P {P.shape} vs T {T.shape}")
    return float(np.sum((P - T) ** 2) + l2_coeff * np.sum(np.asarray(fc_weight) ** 2))


def backward(trace: ForwardTrace, T, params: ModelParams, l2_coeff: float = 0.0, out: Gradients | None = None) -> Gradients:
    """Gradient of one sample's squared error (plus the regularizer when ``l2_coeff`` > 0).

    Accumulates into ``out`` when given, which lets a batch share one buffer.
    """
    if trace.embedded.shape != (len(trace.ids), params.embedding.shape[1]):
        raise ValueError("trace does not match params")
    if trace.probs.shape != params.fc_bias.shape:
        raise ValueError("trace does not match params")
    grads = params.zeros_like() if out is None else out
    P = trace.probs
    dP = 2.0 * (P - np.asarray(T, dtype=np.float64))
    # softmax Jacobian-vector product
    dy = P * (dP - P @ dP)

    grads.fc_weight += np.outer(trace.fc_input, dy)
    grads.fc_bias += dy
    if l2_coeff:
        grads.fc_weight += 2.0 * l2_coeff * params.fc_weight
    dF = params.fc_weight @ dy
    if trace.dropout_mask is not None:
        dF = dF * trace.dropout_mask / (1.0 - trace.dropout_rate)

    dX = np.zeros_like(trace.embedded)
    K = params.config.kernels_per_height
    for bank, (W, pre, amax) in enumerate(zip(params.conv_weights, trace.conv_pre, trace.pool_argmax)):
        g = dF[bank * K:(bank + 1) * K]
        g = np.where(pre[amax, np.arange(K)] > 0.0, g, 0.0)
        _core.conv_backward(trace.embedded, W, amax, g, grads.conv_weights[bank], grads.conv_biases[bank], dX)
    np.add.at(grads.embedding, trace.ids, dX)
    grads.embedding[0] = 0.0
    return grads


def batch_loss(params: ModelParams, batch: Sequence[EncodedRecord], l2_coeff: float) -> float:
    """Loss of a batch with dropout disabled."""
    L = params.config.num_classes
    P = [forward(r.ids, params, mode="infer").probs for r in batch]
    T = [one_hot(r.label, L) for r in batch]
    return loss(P, T, params.fc_weight, l2_coeff)


def batch_gradients(
    params: ModelParams,
    batch: Sequence[EncodedRecord],
    l2_coeff: float,
    dropout_rate: float = 0.0,
    rng=None,
    reduction: str = "mean",
):
    """Forward and backward over a batch.

    Returns (gradients, batch loss, number correct). With ``reduction="mean"``
    the per-sample gradients are averaged; the regularizer gradient is added
    once either way.
    """
    if not batch:
        raise ValueError("empty batch")
    L = params.config.num_classes
    mode = "train" if rng is not None else "infer"
    grads = params.zeros_like()
    err = 0.0
    correct = 0
    for rec in batch:
        tr = forward(rec.ids, params, mode=mode, dropout_rate=dropout_rate if rng is not None else 0.0, rng=rng)
        T = one_hot(rec.label, L)
        err += float(np.sum((tr.probs - T) ** 2))
        correct += int(np.argmax(tr.probs) == rec.label)
        backward(tr, T, params, 0.0, out=grads)
    if reduction == "mean":
        for a in grads.arrays():
            a /= len(batch)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    if l2_coeff:
        grads.fc_weight += 2.0 * l2_coeff * params.fc_weight
    total = err + l2_coeff * float(np.sum(params.fc_weight ** 2))
    return grads, total, correct


def sgd_momentum_step(params: ParamArrays, grads: Gradients, velocity: Velocity, momentum: float, learning_rate: float):
    """``V <- momentum*V - learning_rate*g``; ``w <- w + V``. Row 0 of the embedding is kept frozen."""
    for name, g in grads.named():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    for w, g, v in zip(params.arrays(), grads.arrays(), velocity.arrays()):
        v *= momentum
        v -= learning_rate * g
        w += v
    velocity.embedding[0] = 0.0
    params.embedding[0] = 0.0
    return params, velocity


def clamp_max_norm(fc_weight: np.ndarray, max_norm: float) -> None:
    norms = np.linalg.norm(fc_weight, axis=0)
    scale = np.where(norms > max_norm, max_norm / np.maximum(norms, 1e-300), 1.0)
    fc_weight *= scale


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    heldout_accuracy: float | None
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]


def accuracy(params: ModelParams, records: Sequence[EncodedRecord]) -> float:
    if not records:
        return 0.0
    hits = sum(int(np.argmax(forward(r.ids, params).probs) == r.label) for r in records)
    return hits / len(records)


def train(
    records: Sequence[EncodedRecord],
    config: TrainConfig,
    vocab_size: int,
    heldout: Sequence[EncodedRecord] | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
    params: ModelParams | None = None,
):
    """Mini-batch SGD with momentum; deterministic for a given ``config.seed``."""
    if not records:
        raise ValueError("empty training set")
    L = config.model.num_classes
    if any(not 0 <= r.label < L for r in records):
        raise ValueError("record label out of range for the configured class count")
    if params is None:
        params = init_params(config.model, vocab_size, config.seed)
    velocity = params.zeros_like()
    rng = np.random.default_rng([config.seed, 1])
    history = TrainHistory()
    n = len(records)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        batch_losses = []
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = [records[i] for i in order[start:start + config.batch_size]]
            grads, total, hits = batch_gradients(params, batch, config.l2_coeff, config.dropout_rate, rng)
            if not np.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            batch_losses.append(total / len(batch))
            correct += hits
            sgd_momentum_step(params, grads, velocity, config.momentum, config.learning_rate)
            if config.max_norm is not None:
                clamp_max_norm(params.fc_weight, config.max_norm)
        stats = EpochStats(
            epoch,
            float(np.mean(batch_losses)),
            correct / n,
            accuracy(params, heldout) if heldout else None,
            time.perf_counter() - t0,
        )
        history.epochs.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return params, history


def _coordinate_pool(params: ModelParams, batch, rng) -> list[list[tuple]]:
    """Shuffled candidate coordinates per parameter group.

    Embedding candidates are restricted to rows used by the batch, plus one
    unused row and the pad row, both of which must come out exactly zero.
    """
    present = sorted({i for r in batch for i in r.ids if i != 0})
    pools = []
    for name, arr in params.named():
        if name == "embedding":
            D = arr.shape[1]
            rows = np.array(present or [1])
            flat = rng.permutation(rows.size * D)
            cands = [(int(rows[f // D]), int(f % D)) for f in flat]
            absent = sorted(set(range(1, arr.shape[0])) - set(present))
            fixed = [(0, int(rng.integers(D)))] + ([(absent[0], int(rng.integers(D)))] if absent else [])
            cands = fixed + cands
        else:
            cands = [tuple(int(c) for c in np.unravel_index(int(f), arr.shape)) for f in rng.permutation(arr.size)]
        pools.append(cands)
    return pools


def _probe(params: ModelParams, batch) -> tuple[np.ndarray, list]:
    """Per-sample squared errors with the classifier head in extended precision.

    Also returns the piecewise-linear activation pattern (pool argmax and ReLU
    gate of every kernel) so callers can detect kinks.
    """
    L = params.config.num_classes
    Wf = params.fc_weight.astype(np.longdouble)
    bf = params.fc_bias.astype(np.longdouble)
    errs, pattern = [], []
    for r in batch:
        tr = forward(r.ids, params)
        y = tr.features.astype(np.longdouble) @ Wf + bf
        e = np.exp(y - y.max())
        P = e / e.sum()
        errs.append(np.sum((P - one_hot(r.label, L)) ** 2))
        for pre, amax in zip(tr.conv_pre, tr.pool_argmax):
            pattern.append(amax.copy())
            pattern.append(pre[amax, np.arange(pre.shape[1])] > 0.0)
    return np.array(errs, dtype=np.longdouble), pattern


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check_report(params: ModelParams, batch: Sequence[EncodedRecord], eps: float = 1e-5,
                      l2_coeff: float = 0.0, per_group: int = 40, seed: int = 0) -> dict:
    """Compare analytic and central-difference gradients on sampled coordinates.

    The numeric side differentiates :func:`batch_loss` (dropout off), taking
    the difference per sample before summing so that samples which do not
    depend on a coordinate contribute exactly zero. A coordinate whose
    +/- eps probes change the max-pool or ReLU pattern straddles a kink; it is
    counted in ``"kinks"`` and replaced by the next candidate of its group.

    Returns ``{"groups": {name: [(index, analytic, numeric, rel_error), ...]},
    "kinks": int}``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    analytic, _, _ = batch_gradients(params, batch, l2_coeff, reduction="sum")
    probe = params.copy()
    arrays = probe.arrays()
    names = [n for n, _ in probe.named()]
    grads = analytic.arrays()
    _, base_pattern = _probe(probe, batch)
    groups: dict = {n: [] for n in names}
    kinks = 0

    def reg():
        return np.longdouble(l2_coeff) * np.sum(probe.fc_weight.astype(np.longdouble) ** 2)

    for g, cands in enumerate(_coordinate_pool(probe, batch, rng)):
        arr = arrays[g]
        want = min(per_group, len(cands))
        for idx in cands:
            if len(groups[names[g]]) >= want:
                break
            w0 = arr[idx]
            arr[idx] = w0 + eps
            up, pat_up = _probe(probe, batch)
            reg_up = reg()
            arr[idx] = w0 - eps
            down, pat_down = _probe(probe, batch)
            reg_down = reg()
            arr[idx] = w0
            if not (_same_pattern(pat_up, base_pattern) and _same_pattern(pat_down, base_pattern)):
                kinks += 1
                continue
            num = float((np.sum(up - down) + (reg_up - reg_down)) / (2 * eps))
            ana = float(grads[g][idx])
            rel = abs(ana - num) / max(1e-12, abs(ana) + abs(num))
            groups[names[g]].append((idx, ana, num, rel))
    return {"groups": groups, "kinks": kinks}


def max_relative_error(report: dict, prefix: str = "") -> float:
    return max((row[3] for name, rows in report["groups"].items() if name.startswith(prefix) for row in rows),
               default=0.0)


def grad_check(params: ModelParams, batch: Sequence[EncodedRecord], eps: float = 1e-5, **kwargs) -> float:
    """Maximum relative error between analytic and numeric gradients."""
    return max_relative_error(grad_check_report(params, batch, eps, **kwargs))
