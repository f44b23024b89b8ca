"""Seeded class-conditional corpus generator.

Each document mixes tokens from its class's private marker set with tokens
from a shared background pool whose frequencies follow a Zipf-like law, so
the rarest background words fall below the vocabulary threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .text import write_jsonl

ZIPF_EXPONENT = 1.1


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 6
    train_per_class: int = 200
    test_per_class: int = 50
    vocab_background_size: int = 400
    markers_per_class: int = 12
    tokens_per_doc: tuple[int, int] = (20, 60)
    marker_fraction: float = 0.3
    seed: int = 42

    def __post_init__(self):
        for name in ("num_classes", "train_per_class", "test_per_class",
                     "vocab_background_size", "markers_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        lo, hi = (int(v) for v in self.tokens_per_doc)
        object.__setattr__(self, "tokens_per_doc", (lo, hi))
        if not 1 <= lo <= hi:
            raise ValueError("tokens_per_doc must be a range 1 <= lo <= hi")
        if not 0.0 < self.marker_fraction < 1.0:
            raise ValueError("marker_fraction must be in (0, 1)")


def label_name(c: int) -> str:
    return f"class_{c}"


def marker_tokens(spec: SynthSpec, c: int) -> list[str]:
    return [f"mk{c}x{j}" for j in range(spec.markers_per_class)]


def background_tokens(spec: SynthSpec) -> list[str]:
    return [f"bg{i}" for i in range(spec.vocab_background_size)]


def _document(spec: SynthSpec, c: int, rng, background, bg_weights) -> str:
    lo, hi = spec.tokens_per_doc
    n = int(rng.integers(lo, hi + 1))
    is_marker = rng.random(n) < spec.marker_fraction
    markers = marker_tokens(spec, c)
    m_idx = rng.integers(0, len(markers), size=n)
    b_idx = rng.choice(len(background), size=n, p=bg_weights)
    return " ".join(markers[m] if flag else background[b] for flag, m, b in zip(is_marker, m_idx, b_idx))


def generate_rows(spec: SynthSpec) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Return (train rows, test rows) as ``(text, label)`` pairs."""
    rng = np.random.default_rng(spec.seed)
    background = background_tokens(spec)
    w = 1.0 / np.arange(1, len(background) + 1) ** ZIPF_EXPONENT
    w /= w.sum()
    splits = []
    for per_class in (spec.train_per_class, spec.test_per_class):
        rows = [(_document(spec, c, rng, background, w), label_name(c))
                for c in range(spec.num_classes) for _ in range(per_class)]
        order = rng.permutation(len(rows))
        splits.append([rows[i] for i in order])
    return splits[0], splits[1]


def generate(spec: SynthSpec, out_dir) -> tuple[Path, Path]:
    """Write ``train.jsonl`` and ``test.jsonl`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_rows, test_rows = generate_rows(spec)
    train_path, test_path = out_dir / "train.jsonl", out_dir / "test.jsonl"
    write_jsonl(train_path, train_rows)
    write_jsonl(test_path, test_rows)
    return train_path, test_path


def marker_count_classifier(text: str, spec: SynthSpec) -> str:
    """Baseline that predicts the class whose markers occur most often."""
    tokens = text.split()
    counts = [sum(t in set(marker_tokens(spec, c)) for t in tokens) for c in range(spec.num_classes)]
    return label_name(int(np.argmax(counts)))
