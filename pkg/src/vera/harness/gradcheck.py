"""Central finite-difference verification of every analytic gradient."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .. import adapters as ad
from ..adapters import AdapterConfig, Method
from .model import build_model, cross_entropy, loss_and_grads, model_forward

ADAPTER_METHODS = (Method.VERA, Method.LORA, Method.ONLY_D, Method.ONLY_B)
GRID_DIMS = (3, 8, 32)
GRID_RANKS = (1, 2, 8)


def finite_difference(loss, param: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``loss()`` w.r.t. every entry of ``param`` (in place)."""
    out = np.zeros(param.shape)
    for idx in np.ndindex(param.shape):
        old = param[idx]
        param[idx] = old + step
        hi = loss()
        param[idx] = old - step
        lo = loss()
        param[idx] = old
        out[idx] = (hi - lo) / (2.0 * step)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``max |a - f| / max(|a|, |f|, floor)``; the floor keeps exact zeros (and
    entries at the finite-difference noise level) from dividing by ~0."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float(np.max(np.abs(a - f) / denom))


@dataclass(frozen=True)
class GradcheckEntry:
    case: str            # "layer" or "model"
    method: str
    m: int
    n: int
    r: int
    seed: int
    group: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


@dataclass
class GradcheckReport:
    entries: list[GradcheckEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def failures(self) -> list[GradcheckEntry]:
        return [e for e in self.entries if not e.passed]

    def worst_by_group(self) -> dict[tuple[str, str, str], float]:
        out: dict[tuple[str, str, str], float] = {}
        for e in self.entries:
            key = (e.case, e.method, e.group)
            out[key] = max(out.get(key, 0.0), e.max_rel_err)
        return out


def _random_layer(method: Method, m: int, n: int, r: int, seed: int, fresh: bool = False):
    rng = np.random.default_rng([seed, m, n, r, int(method)])
    cfg = AdapterConfig(method=method, rank=r, r_max=max(r, 8), master_seed=seed)
    layer = ad.build_layer(cfg, rng.normal(size=(m, n)), f"check.{m}x{n}")
    if not fresh:
        for arr in ad.trainable_arrays(layer).values():
            arr[...] = rng.normal(size=arr.shape)
    return layer, rng


def check_layer(method: Method, m: int, n: int, r: int, seed: int = 0, *, fresh: bool = False,
                batch: int = 2, step: float = 1e-6, tolerance: float = 1e-5) -> list[GradcheckEntry]:
    """Compare ``backward`` with finite differences of ``sum(forward(x) * g)``."""
    layer, rng = _random_layer(method, m, n, r, seed, fresh)
    x = rng.normal(size=(batch, n))
    g = rng.normal(size=(batch, m))
    _, cache = ad.forward(layer, x)
    grads, gx = ad.backward(layer, x, g, cache)

    def loss() -> float:
        return float(np.sum(ad.forward(layer, x)[0] * g))

    label = method.label + ("/fresh" if fresh else "")
    entries = []
    for name, arr in ad.trainable_arrays(layer).items():
        err = max_relative_error(grads[name], finite_difference(loss, arr, step))
        entries.append(GradcheckEntry("layer", label, m, n, r, seed, name, err, tolerance))
    err = max_relative_error(gx, finite_difference(loss, x, step))
    entries.append(GradcheckEntry("layer", label, m, n, r, seed, "x", err, tolerance))
    return entries


def check_model(method: Method, d_model: int = 8, r: int = 2, seed: int = 0, *, heads: int = 2,
                seq_len: int = 5, batch: int = 3, vocab: int = 4, blocks: int = 1,
                step: float = 1e-6, tolerance: float = 1e-4) -> list[GradcheckEntry]:
    """End-to-end check of the toy model's cross-entropy gradients (float64)."""
    cfg = AdapterConfig(method=method, rank=r, master_seed=seed)
    model = build_model(cfg, d_model=d_model, heads=heads, vocab=vocab, blocks=blocks,
                        max_len=seq_len, base_seed=seed, dtype=np.float64)
    rng = np.random.default_rng([seed, d_model, int(method)])
    for arr in model.parameters().values():
        arr[...] = rng.normal(scale=0.5, size=arr.shape)
    tokens = rng.integers(0, vocab, size=(batch, seq_len))
    labels = rng.integers(0, 2, size=batch)
    _, grads, _ = loss_and_grads(model, tokens, labels)

    def loss() -> float:
        return cross_entropy(model_forward(model, tokens)[0], labels)[0]

    entries = []
    for name, arr in model.parameters().items():
        err = max_relative_error(grads[name], finite_difference(loss, arr, step))
        entries.append(GradcheckEntry("model", method.label, d_model, d_model, r, seed, name, err,
                                      tolerance))
    return entries


def gradcheck(dims=GRID_DIMS, ranks=GRID_RANKS, seeds=(0,), methods=ADAPTER_METHODS,
              tolerance: float = 1e-4, model_d: int = 8, include_model: bool = True) -> GradcheckReport:
    """Layer checks over the ``(m, n, r)`` grid for every method (plus LoRA with ``B = 0``),
    then the end-to-end toy model for every method including head-only."""
    entries: list[GradcheckEntry] = []
    for seed, method, m, n, r in itertools.product(seeds, methods, dims, dims, ranks):
        entries += check_layer(method, m, n, r, seed, tolerance=tolerance)
        if method is Method.LORA:
            entries += check_layer(method, m, n, r, seed, fresh=True, tolerance=tolerance)
    if include_model:
        for seed in seeds:
            for method in tuple(methods) + (Method.HEAD_ONLY,):
                entries += check_model(method, d_model=model_d, seed=seed, tolerance=tolerance)
    return GradcheckReport(entries)
