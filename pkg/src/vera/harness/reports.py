"""Rank sweeps and per-layer adaptation magnitudes, emitted as CSV."""

from __future__ import annotations

import csv
import io
import os
import statistics
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .. import accounting
from .. import checkpoints
from ..adapters import AdapterConfig, Method
from .model import build_model
from .tasks import TaskKind, TaskSpec
from .train import TrainConfig, train

SWEEP_COLUMNS = ["method", "rank", "params", "seed", "accuracy", "median"]
MAGNITUDE_COLUMNS = ["layer", "role", "d_change_norm", "b_norm"]


class UnsupportedMethodError(ValueError):
    pass


@dataclass(frozen=True)
class SweepRun:
    method: str
    rank: int
    params: int
    seed: int
    accuracy: float


@dataclass(frozen=True)
class SweepRow:
    method: str
    rank: int
    params: int
    median_accuracy: float


@dataclass
class SweepResult:
    runs: list[SweepRun]
    table: list[SweepRow]

    def to_csv(self) -> str:
        """Per-seed rows (``median=0``) followed by one ``seed=median`` row per (method, rank)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for run in self.runs:
            w.writerow([run.method, run.rank, run.params, run.seed, repr(run.accuracy), 0])
        for row in self.table:
            w.writerow([row.method, row.rank, row.params, "median", repr(row.median_accuracy), 1])
        return buf.getvalue()


def model_kwargs_for(task: TaskSpec, d_model: int = 32, heads: int = 2, blocks: int = 1) -> dict:
    """Toy architecture for ``task``; order-sensitive tasks get a frozen positional table."""
    kw = dict(d_model=d_model, heads=heads, vocab=task.vocab, classes=task.classes, blocks=blocks)
    if task.kind is TaskKind.PATTERN_DETECT:
        kw["max_len"] = task.seq_len
    return kw


def toy_shape(d_model: int, blocks: int) -> accounting.ModelShape:
    return accounting.ModelShape("toy", blocks, d_model, adapted_per_block=2)


def run_one(task: TaskSpec, method: Method, rank: int, seed: int, train_config: TrainConfig,
            base: AdapterConfig | None = None, **model_kw) -> tuple[SweepRun, object]:
    base = base or AdapterConfig()
    cfg = replace(base, method=method, rank=rank, r_max=rank, master_seed=seed, lora_alpha=None)
    kw = {**model_kwargs_for(task), **model_kw}
    model = build_model(cfg, base_seed=seed, **kw)
    report = train(model, task, replace(train_config, seed=seed))
    run = SweepRun(method.label, rank, model.adapter_trainable_count(), seed, report.final_accuracy)
    return run, report


def rank_sweep(task: TaskSpec, ranks: Mapping[Method, Sequence[int]],
               seeds: Iterable[int] = range(5), train_config: TrainConfig | None = None,
               base: AdapterConfig | None = None, **model_kw) -> SweepResult:
    """Train every (method, rank, seed) and take medians over seeds.

    ``seeds`` drive the base weights, the shared matrices and the data alike.
    """
    train_config = train_config or TrainConfig()
    seeds = list(seeds)
    runs: list[SweepRun] = []
    table: list[SweepRow] = []
    for method, method_ranks in ranks.items():
        method = Method(method)
        for rank in method_ranks:
            group = [run_one(task, method, rank, s, train_config, base, **model_kw)[0] for s in seeds]
            runs += group
            table.append(SweepRow(method.label, rank, group[0].params,
                                  float(statistics.median(r.accuracy for r in group))))
    return SweepResult(runs, table)


# --- magnitudes -------------------------------------------------------------------------

@dataclass(frozen=True)
class MagnitudeRow:
    layer: str
    role: str
    d_change_norm: float
    b_norm: float


def magnitude_report(ckpt) -> list[MagnitudeRow]:
    """Per-layer ``||d - d_init||`` and ``||b||`` for a VeRA checkpoint.

    ``ckpt`` is a path or an already loaded ``(layers, config)`` pair.
    Layers share one frozen pair per shape, so the norms compare across layers.
    """
    if isinstance(ckpt, (str, os.PathLike)):
        layers, config = checkpoints.load(ckpt)
    else:
        layers, config = ckpt
    if config.method is not Method.VERA:
        raise UnsupportedMethodError(f"magnitude report needs a VeRA checkpoint, got {config.method.label}")
    rows = []
    for layer in layers:
        d = np.asarray(layer.d, dtype=np.float64)
        b = np.asarray(layer.b, dtype=np.float64)
        role = layer.name.rsplit(".", 1)[-1] if "." in layer.name else ""
        rows.append(MagnitudeRow(layer.name, role,
                                 float(np.linalg.norm(d - np.float32(config.d_init))),
                                 float(np.linalg.norm(b))))
    return rows


def magnitude_csv(rows: Sequence[MagnitudeRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MAGNITUDE_COLUMNS)
    for row in rows:
        w.writerow([row.layer, row.role, repr(row.d_change_norm), repr(row.b_norm)])
    return buf.getvalue()
