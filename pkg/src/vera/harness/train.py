"""Training loop: AdamW with separate adapter/head learning rates."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import adapters as ad
from ..prng import make_stream
from .model import ToyModel, accuracy, loss_and_grads
from .optim import AdamW, ParamGroup, linear_schedule
from .tasks import TaskKind, TaskSpec, gen_batch

TRAIN_STREAM = 1
EVAL_STREAM = 2


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float, report: TrainReport):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    lr_adapter: float = 1e-2
    lr_head: float = 1e-3
    steps: int = 500
    batch: int = 32
    seed: int = 0  # data seed
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_ratio: float = 0.06
    eval_size: int = 512
    eval_every: int = 50

    def __post_init__(self):
        if self.lr_adapter < 0 or self.lr_head < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0 <= self.warmup_ratio < 1:
            raise ValueError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_task(cls, task: TaskSpec, **overrides) -> TrainConfig:
        """Defaults tuned per toy task; keyword overrides win."""
        return cls(**{**TASK_DEFAULTS[task.kind], **overrides})


# PatternDetect needs larger steps to leave chance level within a short run.
TASK_DEFAULTS = {
    TaskKind.MAJORITY_TOKEN: dict(lr_adapter=1e-2, lr_head=1e-3, steps=500),
    TaskKind.PATTERN_DETECT: dict(lr_adapter=3e-2, lr_head=1e-2, steps=1000),
}


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    batch_accuracy: list[float] = field(default_factory=list)
    eval_steps: list[int] = field(default_factory=list)
    eval_accuracy: list[float] = field(default_factory=list)
    layers: list = field(default_factory=list)
    config: ad.AdapterConfig | None = None
    diverged: bool = False

    @property
    def initial_accuracy(self) -> float:
        return self.eval_accuracy[0]

    @property
    def final_accuracy(self) -> float:
        return self.eval_accuracy[-1]

    def curve_csv(self) -> str:
        """``step,loss,accuracy`` per step (batch accuracy); held-out rows use ``eval``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "accuracy", "split"])
        for i, (loss, acc) in enumerate(zip(self.losses, self.batch_accuracy), start=1):
            w.writerow([i, repr(loss), repr(acc), "train"])
        for step, acc in zip(self.eval_steps, self.eval_accuracy):
            w.writerow([step, "", repr(acc), "eval"])
        return buf.getvalue()


def eval_set(task: TaskSpec, size: int, data_seed: int):
    return gen_batch(task, size, make_stream(data_seed, EVAL_STREAM))


def make_optimizer(model: ToyModel, config: TrainConfig) -> AdamW:
    params = model.parameters()
    adapter_names = model.param_groups()["adapter"]
    # scaling vectors are not decayed; LoRA matrices and the head are
    decayed = [n for n in adapter_names if n.rsplit(".", 1)[1] in ("A", "B")]
    plain = [n for n in adapter_names if n not in decayed]
    groups = [ParamGroup(["head"], config.lr_head, config.weight_decay)]
    if decayed:
        groups.append(ParamGroup(decayed, config.lr_adapter, config.weight_decay))
    if plain:
        groups.append(ParamGroup(plain, config.lr_adapter, 0.0))
    return AdamW(params, groups, betas=(config.beta1, config.beta2), eps=config.eps)


def train(model: ToyModel, task: TaskSpec, config: TrainConfig) -> TrainReport:
    """Train in place; deterministic given the model's seeds and ``config.seed``.

    Raises :class:`DivergenceError` (carrying the partial report) on a
    non-finite loss.
    """
    if task.vocab != model.vocab or task.classes != model.classes:
        raise ValueError("task vocabulary/classes do not match the model")
    opt = make_optimizer(model, config)
    stream = make_stream(config.seed, TRAIN_STREAM)
    ex, ey = eval_set(task, config.eval_size, config.seed)
    report = TrainReport(config=model.config, layers=model.adapted_layers())
    report.eval_steps.append(0)
    report.eval_accuracy.append(accuracy(model, ex, ey))
    for step in range(config.steps):
        tokens, labels = gen_batch(task, config.batch, stream)
        loss, grads, logits = loss_and_grads(model, tokens, labels)
        if not math.isfinite(loss):
            report.diverged = True
            raise DivergenceError(step + 1, loss, report)
        report.losses.append(loss)
        report.batch_accuracy.append(float(np.mean(np.argmax(logits, axis=1) == labels)))
        opt.step(grads, linear_schedule(step, config.steps, config.warmup_ratio))
        done = step + 1
        if done % config.eval_every == 0 or done == config.steps:
            report.eval_steps.append(done)
            report.eval_accuracy.append(accuracy(model, ex, ey))
    return report
