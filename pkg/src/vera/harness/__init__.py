"""Desk-scale training, gradient checks and reports for the adapters."""

from .model import ToyModel, build_model, cross_entropy, loss_and_grads, model_backward, model_forward
from .tasks import TaskKind, TaskSpec, gen_batch, label_of
from .train import DivergenceError, TrainConfig, TrainReport, train
from .reports import (MagnitudeRow, SweepResult, UnsupportedMethodError, magnitude_csv, magnitude_report,
                      model_kwargs_for, rank_sweep)
