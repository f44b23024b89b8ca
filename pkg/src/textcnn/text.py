"""Tokenization, vocabulary construction and fixed-length encoding."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

PAD_TOKEN = "*pad*"
UNK_TOKEN = "*unk*"
PAD_ID = 0
UNK_ID = 1


class DatasetError(ValueError):
    """Raised for malformed dataset files or unknown labels."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on Unicode whitespace."""
    return text.lower().split()


Tokenizer = Callable[[str], list[str]]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    min_count: int = 5
    _index: dict = field(init=False, repr=False, compare=False)

    pad_id = PAD_ID
    unk_id = UNK_ID

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
            raise ValueError("vocabulary must start with the pad and unk tokens")
        object.__setattr__(self, "tokens", tokens)
        index = {t: i for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        i = self._index.get(token, UNK_ID)
        # a literal pad string in the text is not padding
        return UNK_ID if i == PAD_ID else i

    def token_of(self, i: int) -> str:
        return self.tokens[i]


def build_vocabulary(corpus: Iterable[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Keep tokens seen strictly more than ``min_count`` times.

    Ordering is frequency descending, then token ascending.
    """
    if min_count < 0:
        raise ValueError("min_count must be >= 0")
    counts = Counter(tok for doc in corpus for tok in doc)
    for reserved in (PAD_TOKEN, UNK_TOKEN):
        counts.pop(reserved, None)
    kept = sorted((t for t, c in counts.items() if c > min_count), key=lambda t: (-counts[t], t))
    return Vocabulary((PAD_TOKEN, UNK_TOKEN, *kept), min_count=min_count)


def encode(tokens: Sequence[str], vocab: Vocabulary, seq_len: int) -> list[int]:
    """Map tokens to ids, truncating or right-padding to exactly ``seq_len``."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    ids = [vocab.id_of(t) for t in tokens[:seq_len]]
    ids.extend([PAD_ID] * (seq_len - len(ids)))
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Inverse of :func:`encode` with padding stripped."""
    return [vocab.token_of(i) for i in ids if i != PAD_ID]


@dataclass(frozen=True)
class LabelMap:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        if list(labels) != sorted(set(labels)):
            raise ValueError("labels must be unique and sorted")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "LabelMap":
        return cls(tuple(sorted(set(labels))))

    def __len__(self) -> int:
        return len(self.labels)

    def id_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(label) from None

    def __getitem__(self, i: int) -> str:
        return self.labels[i]


@dataclass(frozen=True)
class EncodedRecord:
    ids: tuple[int, ...]
    label: int


def read_jsonl(path) -> list[tuple[str, str]]:
    """Parse a dataset file into ``(text, label)`` pairs."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                raise DatasetError(f"{path}:{lineno}: blank line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or set(obj) != {"text", "label"}:
                raise DatasetError(f"{path}:{lineno}: expected exactly the fields 'text' and 'label'")
            if not isinstance(obj["text"], str) or not isinstance(obj["label"], str):
                raise DatasetError(f"{path}:{lineno}: 'text' and 'label' must be strings")
            rows.append((obj["text"], obj["label"]))
    return rows


def write_jsonl(path, rows: Iterable[tuple[str, str]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for text, label in rows:
            fh.write(json.dumps({"text": text, "label": label}, ensure_ascii=False) + "\n")
            n += 1
    return n


def load_dataset(
    path,
    vocab: Vocabulary | None = None,
    label_map: LabelMap | None = None,
    *,
    seq_len: int = 130,
    min_count: int = 5,
    tokenizer: Tokenizer = tokenize,
) -> tuple[list[EncodedRecord], Vocabulary, LabelMap]:
    """Load and encode a JSONL dataset.

    Without ``vocab``/``label_map`` both are built from this file (training
    mode). When given they are reused, and labels missing from ``label_map``
    raise :class:`DatasetError`.
    """
    rows = read_jsonl(Path(path))
    docs = [tokenizer(text) for text, _ in rows]
    if vocab is None:
        vocab = build_vocabulary(docs, min_count)
    if label_map is None:
        label_map = LabelMap.from_labels(label for _, label in rows)
    records = []
    for lineno, (doc, (_, label)) in enumerate(zip(docs, rows), start=1):
        try:
            y = label_map.id_of(label)
        except KeyError:
            raise DatasetError(f"{path}:{lineno}: unknown label {label!r}") from None
        records.append(EncodedRecord(tuple(encode(doc, vocab, seq_len)), y))
    return records, vocab, label_map
