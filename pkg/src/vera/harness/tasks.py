"""Synthetic sequence-classification tasks with deterministic labels."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..prng import RngStream


class TaskKind(enum.Enum):
    MAJORITY_TOKEN = "majority"
    PATTERN_DETECT = "pattern"

    @classmethod
    def parse(cls, text: str) -> TaskKind:
        key = text.strip().lower().replace("_", "-")
        aliases = {"majority": cls.MAJORITY_TOKEN, "majority-token": cls.MAJORITY_TOKEN,
                   "majoritytoken": cls.MAJORITY_TOKEN, "pattern": cls.PATTERN_DETECT,
                   "pattern-detect": cls.PATTERN_DETECT, "patterndetect": cls.PATTERN_DETECT}
        if key not in aliases:
            raise ValueError(f"unknown task {text!r}")
        return aliases[key]


@dataclass(frozen=True)
class TaskSpec:
    """MajorityToken: binary tokens, label is the majority symbol (odd ``seq_len``).
    PatternDetect: label is 1 iff ``pattern`` occurs contiguously.

    With vocab 3 and length 20 roughly half of uniform sequences contain the
    default 3-gram.
    """

    kind: TaskKind = TaskKind.MAJORITY_TOKEN
    seq_len: int = 11
    vocab: int = 2
    classes: int = 2
    seed: int = 0
    pattern: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.seq_len < 1 or self.classes != 2:
            raise ValueError("tasks are binary with seq_len >= 1")
        if self.kind is TaskKind.MAJORITY_TOKEN:
            if self.seq_len % 2 == 0:
                raise ValueError(f"MajorityToken needs an odd seq_len, got {self.seq_len}")
            if self.vocab != 2:
                raise ValueError("MajorityToken uses vocab 2")
        elif max(self.pattern) >= self.vocab or len(self.pattern) > self.seq_len:
            raise ValueError(f"pattern {self.pattern} does not fit vocab {self.vocab} / seq_len {self.seq_len}")

    @classmethod
    def majority(cls, seq_len: int = 11, seed: int = 0) -> TaskSpec:
        return cls(TaskKind.MAJORITY_TOKEN, seq_len, 2, 2, seed)

    @classmethod
    def pattern_detect(cls, seq_len: int = 20, vocab: int = 3, seed: int = 0) -> TaskSpec:
        return cls(TaskKind.PATTERN_DETECT, seq_len, vocab, 2, seed)

    @classmethod
    def from_name(cls, name: str, seed: int = 0) -> TaskSpec:
        kind = TaskKind.parse(name)
        return cls.majority(seed=seed) if kind is TaskKind.MAJORITY_TOKEN else cls.pattern_detect(seed=seed)


def label_of(task: TaskSpec, tokens) -> int:
    tokens = list(tokens)
    if task.kind is TaskKind.MAJORITY_TOKEN:
        ones = sum(1 for t in tokens if t == 1)
        return int(2 * ones > len(tokens))
    k = len(task.pattern)
    pat = list(task.pattern)
    return int(any(tokens[i:i + k] == pat for i in range(len(tokens) - k + 1)))


def gen_batch(task: TaskSpec, batch: int, stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``batch`` uniform token sequences (one 64-bit draw per token) and their labels."""
    tokens = np.array([[stream.next_below(task.vocab) for _ in range(task.seq_len)]
                       for _ in range(batch)], dtype=np.int64).reshape(batch, task.seq_len)
    labels = np.array([label_of(task, row) for row in tokens], dtype=np.int64)
    return tokens, labels
